//! On-disk formats, manifests, synthetic cohorts and run reports.

mod cache;
mod manifest;
mod report;
mod rvol;
mod synth;

pub use cache::{decode_cache, encode_cache, read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use manifest::{load_manifest, load_subject, read_manifest, write_manifest, ManifestRow, MANIFEST_HEADER};
pub use report::{build_report, digest_hex, report_csv, round_json, run_id, write_reports};
pub use rvol::{
    decode_rvol, encode_rvol, parse_header, read_rvol, read_rvol_header, write_rvol, RvolHeader, RVOL_HEADER_LEN,
    RVOL_MAGIC, RVOL_VERSION,
};
pub use synth::{generate_records, generate_synthetic, subject_id, ClassBlob, SignalMode, SynthSpec, SURVIVAL_DAYS};
