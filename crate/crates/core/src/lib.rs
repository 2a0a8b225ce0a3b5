//! Indoor geolocation evidence from electrical socket imagery.
//!
//! Sockets are detected in room photos, classified into one of twelve
//! region-standardized plug types (plus a NOISE class), and the types are
//! mapped to candidate countries through a versioned knowledge base.

pub mod country;
pub mod fixture;
pub mod geoloc;
pub mod ingest;
pub mod kb;
pub mod pipeline;
pub mod taxonomy;
pub mod vision;

pub use country::CountryCode;
pub use kb::KnowledgeBase;
pub use taxonomy::{ClfClass, DetClass, PlugType};
