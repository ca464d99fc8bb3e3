pub mod backends;
pub mod http;
pub mod oracles;
