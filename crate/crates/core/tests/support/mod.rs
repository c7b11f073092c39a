pub mod dea_oracle;
