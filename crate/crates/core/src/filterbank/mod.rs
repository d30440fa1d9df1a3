//! Diffusion wavelet filter banks built from powers of the lazy walk.
//!
//! A bank over scales `t_1 < … < t_J` holds `J` band-pass wavelets
//! `Ψ'_0 = I − P^{t_1}`, `Ψ'_j = P^{t_j} − P^{t_{j+1}}` and the low-pass
//! `Φ'_J = P^{t_J}`. The dyadic bank is the special case `t = (1, 2, …, 2^J)`.

mod bank;
mod frame;
mod scales;

pub use bank::{build_bank, FilterBank};
pub use frame::{
    certify_signals, conjugate_spectrum, frame_certificate, frame_constant, FrameCertificate,
    FrameTrial, DEFAULT_DENSE_CAP,
};
pub use scales::{dyadic_scales, ScaleSequence};
