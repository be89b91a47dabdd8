//! Estimation chain applied to synthesized (or recorded) traces.

pub mod charge;
pub mod coincidence;
pub mod digitize;
pub mod filter;
pub mod hmm;
pub mod lorentzian;
pub mod powerlaw;
pub mod psd;
pub mod special;
pub mod tomography;

pub use charge::{
    estimate_impact_rate, jump_rate, jump_rate_combined, track_offset_charge, ChargeJump, ChargeRecord, ImpactRate,
    JumpRate,
};
pub use coincidence::{
    coincidence_anchors, coincidence_window, count_coincidences, edge_report, edges, predict_saturation,
    shifted_background, Background, CoincidenceReport, CoincidenceWindow,
};
pub use digitize::{digitize, digitize_samples, median_threshold, DigitalTrace};
pub use filter::{moving_average, separating_window};
pub use hmm::{hmm_decode, HmmOptions, HmmResult};
pub use lorentzian::{fit_lorentzian, lorentzian_psd, LorentzianOptions};
pub use powerlaw::{fit_powerlaw, FloorOption, PowerLawFit};
pub use psd::{default_segment_len, estimate_psd, PsdEstimate};
pub use tomography::{fit_tomography, p1_model};
