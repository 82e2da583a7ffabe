pub mod augmentation;
pub mod cli;
pub mod features;
pub mod filterbank;
pub mod nn;
pub mod oracle;
pub mod signal_io;
