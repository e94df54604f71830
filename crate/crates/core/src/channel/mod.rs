//! Correlated Rician channel between the fluid-antenna base station, the
//! metasurface and the users.

pub mod assemble;
pub mod bessel;
pub mod correlation;
pub mod fading;
pub mod steering;

pub use assemble::{
    assemble_channels, effective_channel, effective_channel_user, phase_coupling, rates_from_effective,
    sinr_and_rate, ChannelModel, ChannelParts, ChannelRealization, RateReport, RicianScaling,
};
pub use correlation::{jakes_correlation, psd_sqrt, CorrelationSet, SqrtFactor, PSD_TOLERANCE};
pub use fading::{draw_small_scale, SmallScaleDraw};
pub use steering::{steering_from_direction, steering_vector};
