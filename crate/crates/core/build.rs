// Links the system OpenBLAS (which bundles LAPACK) for ndarray-linalg.
// The vendored `openblas-src` backends are bypassed on purpose: the build
// host provides libopenblas via the distribution packages.
fn main() {
    println!("cargo:rustc-link-lib=dylib=openblas");
}
