from .depth_metrics import DepthMetrics, depth_metrics, median_rescale
from .distribution import TranslationMetrics, fid, kid
from .features import FeatureExtractor, RandomConvExtractor, extract_features


def translation_metrics(images_a, images_b, extractor: FeatureExtractor, **kid_kw) -> TranslationMetrics:
    fa, ident = extract_features(images_a, extractor)
    fb, _ = extract_features(images_b, extractor)
    mean, std = kid(fa, fb, **kid_kw)
    return TranslationMetrics(fid(fa, fb), mean, std, ident)


__all__ = [
    "DepthMetrics",
    "FeatureExtractor",
    "RandomConvExtractor",
    "TranslationMetrics",
    "depth_metrics",
    "extract_features",
    "fid",
    "kid",
    "median_rescale",
    "translation_metrics",
]
