pub mod reference_eval;
