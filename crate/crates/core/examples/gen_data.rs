//! Generate the synthetic rotated-glyph domains, export them as CEBD and
//! IDX, and rebuild rotation domains from the IDX files.
//!
//! cargo run --release --example gen_data -- [out_dir]

use earlybranch::data::{
    generate_synthetic, load_idx, make_rotation_domains, write_idx_images, write_idx_labels, DomainDataset,
    SyntheticConfig,
};
use earlybranch::Error;
use std::path::PathBuf;

fn main() -> earlybranch::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("earlybranch-data"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;

    let cfg = SyntheticConfig::default();
    let ds = generate_synthetic(&cfg)?;
    let digest = ds.save(&out.join("synthetic.cebd"))?;
    println!("synthetic: {} images {:?}, domains {:?}", ds.len(), ds.image_shape(), ds.domain_counts());
    println!("  sha256 {digest}");
    let back = DomainDataset::load(&out.join("synthetic.cebd"))?;
    assert_eq!(back.labels(), ds.labels());

    // Unrotated domain 0 as an IDX pair, then rotated back into six domains.
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.domains()[i] == 0).collect();
    let batch = ds.gather(&idx);
    let write = |name: &str, bytes: Vec<u8>| {
        let p = out.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::Io { path: p.clone(), source: e })
    };
    write("images.idx", write_idx_images(&batch.images)?)?;
    write("labels.idx", write_idx_labels(&batch.labels)?)?;
    let (images, labels) = load_idx(&out.join("images.idx"), &out.join("labels.idx"))?;
    let rotated = make_rotation_domains(&images, &labels, &cfg.angles)?;
    println!("from IDX: {} images, domains {:?}", rotated.len(), rotated.domain_counts());
    println!("written to {}", out.display());
    Ok(())
}
