//! Records, eye-patch preprocessing, cross-subject splits, dataset IO and
//! a synthetic eye generator with exact labels.

pub mod io;
pub mod oracle;
pub mod preprocess;
pub mod record;
pub mod split;
pub mod synth;

pub use io::{export_records, load_records, load_records_with_stats, LoadStats};
pub use oracle::{pupil_offset, PupilOracle};
pub use preprocess::{
    assemble_batch, make_sample, pad_face_crop, PaddedCrop, Sample, SampleConfig,
};
pub use record::{Eye, EyeChoice, EyePolicy, HeadPose, Record, CROP_HEIGHT, CROP_WIDTH};
pub use split::{split_cross_subject, Split, SplitSpec};
pub use synth::{
    render_eye_patch, synth_generate, synth_generate_detailed, EyeShape, SynthConfig, SynthRecord,
};
