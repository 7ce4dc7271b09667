//! Marginal distribution fitting (placeholder).
