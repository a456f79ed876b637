//! Memory node: translation, pool DRAM timing, receive FIFO, and the node
//! state machine that ties them to the link.

pub mod dram;
pub mod fifo;
pub mod gmm;
pub mod translate;
pub mod node;
