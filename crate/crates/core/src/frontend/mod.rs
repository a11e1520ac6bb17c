//! 16 kHz PCM to stacked log mel filterbank features.

pub mod dump;
pub mod features;
pub mod wav;

pub use dump::{read_feature_dump, write_feature_dump};
pub use features::{
    frame_count, hann_window, lfbe_frames_for, mel_centers_hz, stack_subsample, stacked_count, FeatureFrame, Frontend,
    FrontendOptions, LfbeFrame, FEATURE_DIM, LOG_FLOOR, NUM_MELS, SAMPLE_RATE, STACK, SUBSAMPLE,
};
pub use wav::{parse_wav, write_wav, PcmAudio};
