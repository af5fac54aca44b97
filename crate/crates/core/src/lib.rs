//! Fault-tolerant execution of task workloads on clustered multicore
//! nodes: TMR policy variants, leader election over stability scores and
//! isolation of permanently faulty cores.

pub mod fault;
pub mod fti;
pub mod harness;
pub mod isolation;
pub mod node;
pub mod sim;
pub mod tmr;
pub mod workload;

pub use fault::{FaultModel, InputToken, PermanentFaultConfig, Token, TransientFaultConfig};
pub use node::{CoreAddr, CoreState, Health, NodeId, NodeState, Role};
pub use tmr::PolicyKind;
pub use workload::{AppKind, Application, Task, TaskId};
