//! Pipeline configuration (placeholder).
