//! Countermeasures: frequency noise injection and syscall-pattern detection.

pub mod detect;
pub mod noise;

pub use detect::{
    detect, detect_reader, detections_to_tsv, parse_event_stream, parse_timestamp_ms, Detection, Detector, DetectorConfig,
    EventParser, SyscallEvent,
};
pub use noise::{
    augment_with_noise, fp_kernel, pin_to_core, run_noise_injector, simulated_bursts, BurstLog, BurstRecord,
    NoiseConfig, NoiseSchedule, DEFAULT_KERNEL_ITERATIONS, DEFAULT_REPEAT_UNIT_MS,
};
