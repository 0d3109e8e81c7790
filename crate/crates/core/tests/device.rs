mod common;

use common::{fixed_contact, layered_1d, pn_diode, region, robin, two_layer_2d};
use proptest::prelude::*;
use vanroos::device::{build_mesh, validate_device, BoundaryTag, Device, DeviceSpec, FaceKind, Side, SurfaceSegment};
use vanroos::recombination::SurfaceRecombination;
use vanroos::Error;

#[test]
fn uniform_grid_example() {
    let mesh = build_mesh(&DeviceSpec::uniform_1d(1.0), &[4]).unwrap();
    assert_eq!(mesh.num_cells(), 4);
    assert_eq!(mesh.faces.len(), 5);
    for c in &mesh.cells {
        assert!((c.volume - 0.25).abs() < 1e-15);
    }
}

#[test]
fn two_layer_interface_at_face_two() {
    let spec = layered_1d(1.0, &[0.5], &[1.0, 1.0], SurfaceRecombination::Zero);
    let mesh = build_mesh(&spec, &[4]).unwrap();
    assert_eq!(mesh.interface_faces, vec![vec![2]]);
    assert!(matches!(
        mesh.faces[2].kind,
        FaceKind::Interior {
            left: 1,
            right: 2,
            interface: Some(0),
            ..
        }
    ));
}

#[test]
fn face_count_of_tensor_grid() {
    let spec = two_layer_2d();
    let mesh = build_mesh(&spec, &[4, 2]).unwrap();
    assert_eq!(mesh.num_cells(), 8);
    let (n, m) = (4, 2);
    assert_eq!(mesh.faces.len(), (n + 1) * m + n * (m + 1));
    assert_eq!(mesh.faces.len(), 22);
}

#[test]
fn validation_examples() {
    let report = validate_device(&DeviceSpec::uniform_1d(1.0));
    assert!(report.to_string().contains("no Dirichlet contact and zero capacity"));

    let mut spec = pn_diode(1.0, 1.0, 0.0);
    spec.layers[0].mobility.electrons = vec![0.0];
    assert!(validate_device(&spec).to_string().contains("ellipticity lower bound"));

    assert!(validate_device(&pn_diode(1.0, 1.0, 0.0)).is_ok());
    assert!(validate_device(&two_layer_2d()).is_ok());
}

#[test]
fn capacity_alone_makes_device_coercive() {
    let mut spec = DeviceSpec::uniform_1d(1.0);
    spec.boundary.robin = vec![robin(Side::XMin, 0.5, 0.0)];
    assert!(validate_device(&spec).is_ok());
    spec.boundary.robin[0].capacity = 0.0;
    assert!(!validate_device(&spec).is_ok());
}

#[test]
fn gap_and_interface_off_layer_are_reported() {
    let mut spec = layered_1d(1.0, &[0.5], &[1.0, 2.0], SurfaceRecombination::Zero);
    spec.boundary.contacts = vec![fixed_contact("c", Side::XMin, 0.0, [0.0, 0.0])];
    spec.layers[1].bounds = vec![[0.75, 1.0]];
    spec.interfaces[0].position = 0.6;
    let report = validate_device(&spec);
    assert!(report.contains("layer-gap"));
    assert!(report.contains("interface-off-layer"));
    assert!(Device::new(spec, &[8]).is_err());
}

#[test]
fn unsnappable_coordinate_is_named() {
    let spec = layered_1d(1.0, &[0.3], &[1.0, 2.0], SurfaceRecombination::Zero);
    match build_mesh(&spec, &[4]) {
        Err(Error::Geometry(msg)) => assert!(msg.contains("0.3"), "{msg}"),
        other => panic!("expected geometry error, got {other:?}"),
    }
}

#[test]
fn tags_partition_the_boundary() {
    let mut spec = two_layer_2d();
    spec.boundary.surfaces = vec![SurfaceSegment {
        side: Side::YMin,
        range: Some([0.0, 0.5]),
        model: SurfaceRecombination::SurfaceSrh {
            n_i: 1.0,
            n1: 1.0,
            n2: 1.0,
            v1: 1.0,
            v2: 1.0,
        },
    }];
    let device = Device::new(spec, &[8, 8]).unwrap();
    let mesh = &device.mesh;
    let (mut dirichlet, mut robin_count, mut neumann, mut surface) = (0, 0, 0, 0);
    for f in &mesh.faces {
        match f.kind {
            FaceKind::Boundary { tag, side, .. } => match tag {
                BoundaryTag::Dirichlet(_) => {
                    assert!(matches!(side, Side::XMin | Side::XMax));
                    dirichlet += 1;
                }
                BoundaryTag::Robin(_) => {
                    assert_eq!(side, Side::YMax);
                    robin_count += 1;
                }
                BoundaryTag::Neumann(s) => {
                    assert_eq!(side, Side::YMin);
                    neumann += 1;
                    if s.is_some() {
                        assert!(f.center[0] <= 0.5);
                        surface += 1;
                    }
                }
            },
            FaceKind::Interior { interface, .. } => {
                if interface.is_some() {
                    assert_eq!(f.axis, 1);
                    assert!((f.center[1] - 0.5).abs() < 1e-15);
                }
            }
        }
    }
    assert_eq!((dirichlet, robin_count, neumann, surface), (16, 8, 8, 4));
    assert_eq!(mesh.interface_faces[0].len(), 8);
}

#[test]
fn each_cell_has_exactly_one_region() {
    let device = Device::new(two_layer_2d(), &[6, 4]).unwrap();
    for (i, c) in device.mesh.cells.iter().enumerate() {
        let owners = device.spec.layers.iter().filter(|l| l.contains(&c.center[..2])).count();
        assert_eq!(owners, 1);
        let expect = if c.center[1] < 0.5 { "bottom" } else { "top" };
        assert_eq!(device.region(i).name, expect);
    }
}

#[test]
fn sheet_doping_faces() {
    let mut spec = layered_1d(1.0, &[0.5], &[1.0, 1.0], SurfaceRecombination::Zero);
    spec.boundary.contacts = vec![fixed_contact("c", Side::XMin, 0.0, [0.0, 0.0])];
    spec.doping.sheets = vec![
        vanroos::device::SheetDoping {
            side: None,
            axis: Some(0),
            position: Some(0.5),
            range: None,
            density: 2.0,
        },
        vanroos::device::SheetDoping {
            side: Some(Side::XMax),
            axis: None,
            position: None,
            range: None,
            density: -1.0,
        },
    ];
    let device = Device::new(spec, &[4]).unwrap();
    assert_eq!(device.mesh.sheet_faces, vec![vec![2], vec![4]]);
}

#[test]
fn interfaces_are_interior_faces() {
    let spec = layered_1d(3.0, &[1.0, 2.0], &[1.0, 2.0, 3.0], SurfaceRecombination::Zero);
    let mesh = build_mesh(&spec, &[12]).unwrap();
    for fs in &mesh.interface_faces {
        for &f in fs {
            assert!(matches!(mesh.faces[f].kind, FaceKind::Interior { .. }));
        }
    }
}

proptest! {
    #[test]
    fn prop_volumes_partition_the_domain(
        lx in 0.1f64..10.0,
        ly in 0.1f64..10.0,
        nx in 2usize..40,
        ny in 2usize..40,
    ) {
        let mut spec = DeviceSpec::uniform_1d(lx);
        spec.dimension = 2;
        spec.extent = vec![lx, ly];
        spec.layers = vec![region("all", vec![[0.0, lx], [0.0, ly]], 1.0, [1.0, 1.0])];
        let mesh = build_mesh(&spec, &[nx, ny]).unwrap();
        let total: f64 = mesh.volumes().iter().sum();
        prop_assert!((total - lx * ly).abs() <= 1e-13 * lx * ly);
        prop_assert!(mesh.faces.iter().all(|f| f.area > 0.0));
        for f in &mesh.faces {
            if let FaceKind::Interior { left, right, .. } = f.kind {
                prop_assert!(left != right);
            }
        }
    }

    #[test]
    fn prop_1d_partition(l in 0.01f64..100.0, n in 2usize..500) {
        let mesh = build_mesh(&DeviceSpec::uniform_1d(l), &[n]).unwrap();
        let total: f64 = mesh.volumes().iter().sum();
        prop_assert!((total - l).abs() <= 1e-13 * l);
        prop_assert_eq!(mesh.faces.len(), n + 1);
    }
}
