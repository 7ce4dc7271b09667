//! Validation metrics (placeholder).
