//! Batch pipelines (placeholder).
