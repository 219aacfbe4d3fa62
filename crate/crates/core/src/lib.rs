//! Privacy-preserving exam proctoring: hide the face (eyes left visible),
//! then flag pose anomalies from perceptual-hash distances to an anchor
//! frame that is reselected whenever the student settles back into a
//! normal pose.

pub mod anomaly;
pub mod calibration;
pub mod detections;
pub mod error;
pub mod evalharness;
pub mod exec;
pub mod facehide;
pub mod frame;
pub mod imagehash;
pub mod pipeline;

pub use error::{Error, Result};
pub use frame::{BoundingBox, Frame, PixelFormat, Rgb};
