//! File formats: MetaImage volumes and deformations, landmark lists and
//! registration reports.

mod landmarks;
mod metaimage;
mod report;

pub use landmarks::{parse_landmarks, read_landmarks, write_landmarks};
pub use metaimage::{
    read_deformation, read_header, read_volume, write_deformation, write_volume, ElementType, MetaHeader,
};
pub use report::{format_report, parse_report_keys, parse_report_trace, write_report, TRACE_HEADER};
