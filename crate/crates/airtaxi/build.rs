use std::process::Command;

fn main() {
    // Embed a git-describe style build identifier; falls back to the crate
    // version when the build happens outside a git checkout.
    let describe = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")));
    println!("cargo:rustc-env=AIRTAXI_BUILD_ID={describe}");
    println!("cargo:rerun-if-changed=build.rs");
}
