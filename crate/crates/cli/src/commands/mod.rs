pub mod denoise;
pub mod eval;
pub mod gen_data;
pub mod gradcheck;
pub mod sweep_cmd;
pub mod train;
