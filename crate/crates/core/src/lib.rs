pub mod allocation;
pub mod protocol;
pub mod routing;
pub mod sim;
pub mod topology;
