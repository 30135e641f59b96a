//! The CPU-IMAC co-processor: a memory-mapped transfer buffer with a ready
//! register and a countdown timer, output ADCs, and end-to-end inference
//! with digital convolutions feeding an analog fully-connected head.

mod adc;
mod hetero;
mod protocol;

pub use adc::{AdcMode, AdcParams, MAX_ADC_BITS};
pub use hetero::{read_out, HeteroPipeline, ImacCoprocessor, PipelineEvaluation, PipelineRun};
pub use protocol::{
    trace_to_ops, write_trace_csv, Coprocessor, EventKind, Output, Ready, TraceEvent, TransferProtocolState, Word,
    BUFFER_BYTES, READY_ADDRESS, TRIT_CAPACITY,
};
