//! Onboard sensor simulation: IMU with lever-arm effects, downward range
//! finder, downward camera feature tracks and a synthetic event stream with
//! rotation-compensated event frames.

mod camera;
mod dump;
mod events;
mod imu;
mod range;

pub use camera::{
    observe_features, CameraModel, FeatureObservation, FrameTracker, FrontendDegradation, LandmarkField, TrackBook,
};
pub use dump::{read_events_csv, write_events_csv, write_imu_csv, write_range_csv};
pub use events::{
    boundary_crossings, build_event_frame, clusters, select_window, synthesize_events, window_rotation, Event,
    EventFrame, EventGenerator, EventTracker, PixelTrajectory, WarpedEvent,
};
pub use imu::{simulate_imu, specific_force, ImuModel, ImuSample};
pub use range::{simulate_range, RangeModel, RangeSample};
