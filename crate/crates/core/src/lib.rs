//! Unbiased online sampling over large spatiotemporal point sets.
//!
//! Points are partitioned into fixed-width temporal bins. Each bin owns a
//! quad pyramid whose leaves keep their points in shuffled, segmented
//! arrays and whose inner cells keep sample buffers made of one leaf
//! segment per descendant leaf. A [`SamplingSession`] reads these buffers
//! incrementally so that every point matching a query has the same chance
//! of appearing in each update.
//!
//! ```
//! use stull_core::{GeoPoint, IndexConfig, Query, SamplingConfig, SamplingSession, SpatialRect, StullIndex};
//!
//! let extent = SpatialRect::new(0.0, 0.0, 1.0, 1.0).unwrap();
//! let config = IndexConfig { height: 4, bin_interval: 86_400, origin_time: 0, extent };
//! let points: Vec<GeoPoint> = (0..1000)
//!     .map(|i| GeoPoint::new(i, (i as f64 * 0.618).fract(), (i as f64 * 0.754).fract(), i as i64 * 60))
//!     .collect();
//! let index = StullIndex::build(&points, config, 7).unwrap();
//!
//! let mut session = SamplingSession::open(&index, Query::everything(extent), SamplingConfig::new(5, 42)).unwrap();
//! let first = session.next_update().unwrap();
//! assert_eq!(session.total_updates(), 20);
//! assert!(first.points.len() > 0);
//! ```

pub mod baselines;
pub mod evaluation;
pub mod geometry;
pub mod index;
pub mod persist;
pub mod rng;
pub mod sampler;

pub use geometry::{GeoPoint, GridGeometry, Query, SpatialRect, TimeRange};
pub use index::{IndexConfig, IndexError, InsertReport, StullIndex};
pub use sampler::{IncrementalSampler, SampleBatch, SamplingConfig, SamplingError, SamplingSession, SessionOptions};
