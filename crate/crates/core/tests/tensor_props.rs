use fedflow::placement::{client_slice, place_clients, place_server, unplace};
use fedflow::tensor::{batched_dot, reduce_axis, reduce_leading, tile_leading, ReduceOp};
use fedflow::{ClientCount, Placement, PlacedTensor, Tensor};
use proptest::prelude::*;

fn int_tensor(max_len: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_len).prop_flat_map(|len| {
        prop::collection::vec(-1000i32..1000, len)
            .prop_map(move |v| Tensor::new(vec![1, len], v.into_iter().map(f64::from).collect()).unwrap())
    })
}

fn float_matrix() -> impl Strategy<Value = (Tensor, Tensor)> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        let v = prop::collection::vec(-1e3f64..1e3, r * c);
        (v.clone(), v).prop_map(move |(a, b)| {
            (Tensor::new(vec![r, c], a).unwrap(), Tensor::new(vec![r, c], b).unwrap())
        })
    })
}

proptest! {
    #[test]
    fn reduce_of_tile_is_scaled_row(a in int_tensor(8), n in 1usize..300) {
        let s = reduce_leading(ReduceOp::Sum, &tile_leading(&a, n).unwrap()).unwrap();
        let row = a.index_leading(0).unwrap();
        let expected: Vec<f64> = row.data().iter().map(|v| v * n as f64).collect();
        prop_assert_eq!(s.to_vec(), expected);
    }

    #[test]
    fn batched_dot_is_symmetric((a, b) in float_matrix()) {
        let ab = batched_dot(&a, &b).unwrap();
        let ba = batched_dot(&b, &a).unwrap();
        prop_assert!(ab.bit_eq(&ba));
    }

    #[test]
    fn summation_is_reproducible(v in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let t = Tensor::new(vec![v.len()], v).unwrap();
        let a = reduce_axis(ReduceOp::Sum, &t, 0, false).unwrap();
        let b = reduce_axis(ReduceOp::Sum, &t.clone(), 0, false).unwrap();
        prop_assert!(a.bit_eq(&b));
    }

    #[test]
    fn placed_cardinality_matches_leading_extent(k in 1usize..9, len in 1usize..5, extra in 0usize..3) {
        let clients = ClientCount::new(k).unwrap();
        let ok = Tensor::zeros(&[k, len], fedflow::DType::F64);
        let placed = PlacedTensor::new(ok, Placement::Clients, clients).unwrap();
        prop_assert_eq!(placed.cardinality(), k);
        let bad = Tensor::zeros(&[k + 1 + extra, len], fedflow::DType::F64);
        prop_assert!(PlacedTensor::new(bad, Placement::Clients, clients).is_err());
        let server = Tensor::zeros(&[1, len], fedflow::DType::F64);
        prop_assert_eq!(PlacedTensor::new(server, Placement::Server, clients).unwrap().cardinality(), 1);
    }

    #[test]
    fn place_and_slice_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e9f64..1e9, 3), 1..7)) {
        let parts: Vec<Tensor> = rows.iter().map(|r| Tensor::vector(r)).collect();
        let placed = place_clients(&parts, ClientCount::new(parts.len()).unwrap()).unwrap();
        for (i, p) in parts.iter().enumerate() {
            prop_assert!(client_slice(&placed, i).unwrap().bit_eq(p));
        }
        let s = place_server(&parts[0]);
        prop_assert!(unplace(&s).unwrap().bit_eq(&parts[0]));
    }
}

#[test]
fn placement_names() {
    assert_eq!(Placement::from_name("clients"), Some(Placement::Clients));
    assert_eq!(Placement::from_name("server").map(Placement::name), Some("server"));
    assert!(ClientCount::new(0).is_err());
}
