"""Detection-quality metrics"""
__all__ = [
    'APResult', 'average_precision', 'evaluate', 'match_detections', 'pr_curve',
    'write_pr_csv', 'write_report']  # yapf: disable

from .apeval import (
    APResult,
    average_precision,
    evaluate,
    match_detections,
    pr_curve,
    write_pr_csv,
    write_report,
)
