#![no_main]

use libfuzzer_sys::fuzz_target;
use uvrefine::FaceMesh;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mesh) = FaceMesh::parse_obj(text) {
        // whatever parses must survive a write/read cycle; the v flip of
        // texture coordinates is not exact in floating point
        let again = FaceMesh::parse_obj(&mesh.to_obj()).expect("re-parse of written mesh");
        assert_eq!(mesh.vertices(), again.vertices());
        assert_eq!(mesh.triangles(), again.triangles());
        for (a, b) in mesh.uv().iter().zip(again.uv()) {
            assert!((a[0] - b[0]).abs() <= 1e-9 * (1.0 + a[0].abs()));
            assert!((a[1] - b[1]).abs() <= 1e-9 * (1.0 + a[1].abs()));
        }
    }
});
