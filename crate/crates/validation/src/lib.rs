//! Acceptance runs live under tests/.
