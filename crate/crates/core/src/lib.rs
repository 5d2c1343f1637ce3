pub mod adc;
pub mod calibration;
pub mod crossbar;
pub mod metrics;
pub mod qat;
pub mod quant;
