pub mod activity;
pub mod criticality;
pub mod evaluation;
pub mod export;
pub mod interval;
pub mod par;
pub mod pipeline;
pub mod position;
pub mod schema;
pub mod search;
pub mod store;
pub mod synth;
pub mod understanding;
