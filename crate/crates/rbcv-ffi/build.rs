use std::path::Path;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("manifest dir");
    let header = Path::new(&crate_dir).join("include/rbcv.h");

    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            // Rewrite only on change so repeated builds stay clean.
            let mut buf = Vec::new();
            bindings.write(&mut buf);
            let current = std::fs::read(&header).unwrap_or_default();
            if current != buf {
                std::fs::create_dir_all(header.parent().unwrap()).expect("include dir");
                std::fs::write(&header, &buf).expect("write header");
            }
        }
        Err(e) => {
            // Keep the committed header usable even if generation fails.
            println!("cargo:warning=cbindgen failed: {e}");
        }
    }
}
