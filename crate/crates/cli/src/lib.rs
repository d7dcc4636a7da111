pub mod kink;
