#[cfg(feature = "headers")]
mod headers {
    use std::env;
    use std::path::Path;

    pub fn generate() {
        let crate_dir = env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR is set by cargo");
        let config = cbindgen::Config::from_file(Path::new(&crate_dir).join("cbindgen.toml"))
            .expect("could not read cbindgen.toml");
        cbindgen::Builder::new()
            .with_crate(&crate_dir)
            .with_config(config)
            .generate()
            .expect("could not generate C header")
            .write_to_file(Path::new(&crate_dir).join("include/multiver.h"));
    }
}

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    #[cfg(feature = "headers")]
    headers::generate();
}
