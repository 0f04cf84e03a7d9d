#![no_main]
use libfuzzer_sys::fuzz_target;
use origami_reservoir::pattern::OrigamiMesh;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(mesh) = OrigamiMesh::from_json(text) {
            let again = OrigamiMesh::from_json(&mesh.to_json()).expect("round trip");
            assert_eq!(again.node_count(), mesh.node_count());
        }
    }
});
