use cfcon_core::synthgen::{generate_dataset, read_dataset, write_dataset};
use cfcon_core::trainkit::{evaluate, start_state, train_stage1, train_stage2, ModelShape};
use cfcon_core::{Error, GenConfig, TensorFile, TrainConfig, TrainState, WorldSpec};

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        model: ModelShape {
            d: 16,
            heads: 2,
            n_video_layers: 1,
            n_text_layers: 1,
            ..ModelShape::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn dataset_on_disk_trains_like_the_one_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&WorldSpec::default(), &GenConfig { num_qa: 24, seed: 9, ..GenConfig::default() }).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let loaded = read_dataset(dir.path()).unwrap();
    assert_eq!(loaded, ds);

    let cfg = small_cfg();
    let mut a = start_state(&ds, &cfg).unwrap();
    let mut b = start_state(&loaded, &cfg).unwrap();
    train_stage1(&ds, &mut a, &cfg).unwrap();
    train_stage1(&loaded, &mut b, &cfg).unwrap();
    assert_eq!(a.to_tensor_file().unwrap().to_bytes().unwrap(), b.to_tensor_file().unwrap().to_bytes().unwrap());
}

#[test]
fn checkpoint_carries_everything_stage2_needs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&WorldSpec::default(), &GenConfig { num_qa: 16, seed: 4, ..GenConfig::default() }).unwrap();
    let ckpt = dir.path().join("s1.ckpt");
    let mut cfg = small_cfg();
    cfg.paths.checkpoint_out = Some(ckpt.clone());
    let mut s1 = start_state(&ds, &cfg).unwrap();
    train_stage1(&ds, &mut s1, &cfg).unwrap();
    assert!(!dir.path().join("s1.ckpt.tmp").exists());

    let loaded = TrainState::load(&ckpt).unwrap();
    assert_eq!(loaded.params, {
        let mut p = s1.params.clone();
        p.zero_grads();
        p
    });
    assert_eq!(loaded.adam, s1.adam);
    assert_eq!((loaded.stage, loaded.epochs_done), (1, 2));
    assert_eq!(evaluate(&ds, &loaded).unwrap(), evaluate(&ds, &s1).unwrap());

    let mut cfg2 = TrainConfig::stage2(ckpt.clone());
    cfg2.epochs = 1;
    cfg2.batch_size = 8;
    cfg2.model = cfg.model;
    let mut s2 = start_state(&ds, &cfg2).unwrap();
    let report = train_stage2(&ds, &mut s2, &cfg2).unwrap();
    assert_eq!(report.epochs[0].epoch, 2);
    assert_eq!(s2.stage, 2);
}

#[test]
fn checkpoint_layout_is_manifest_then_little_endian_blob() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&WorldSpec::default(), &GenConfig { num_qa: 8, ..GenConfig::default() }).unwrap();
    let state = TrainState::init(&ds, &small_cfg()).unwrap();
    let path = dir.path().join("init.ckpt");
    state.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
    let manifest: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
    assert!(manifest["format_version"].is_u64());
    let first = &manifest["tensors"][0];
    let name = first["name"].as_str().unwrap();
    assert_eq!(first["offset"], 0);
    let value = f64::from_le_bytes(bytes[nl + 1..nl + 9].try_into().unwrap());
    assert_eq!(value, state.params.get(name).data()[0]);
    let blob_len: u64 = manifest["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| 8 * t["shape"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).product::<u64>())
        .sum();
    assert_eq!(bytes.len() - nl - 1, blob_len as usize);

    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(TensorFile::read(&path), Err(Error::Format { .. })));
    assert!(matches!(TrainState::load(&path), Err(Error::Format { .. })));
}
