use fedflow::fedprims::{federated_broadcast, federated_map, federated_mean, federated_sum, Eager};
use fedflow::placement::{place_clients, place_server, PlacedStructure};
use fedflow::tensor::{ew_unary, UnaryOp};
use fedflow::{ClientCount, FedBuilder, Placement, Tensor};
use proptest::prelude::*;

fn clients_value() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (1usize..8, 1usize..4).prop_flat_map(|(k, len)| {
        (Just(k), prop::collection::vec(prop::collection::vec(-1e3f64..1e3, len), k))
    })
}

proptest! {
    #[test]
    fn sum_of_broadcast_scales_by_n(v in prop::collection::vec(-1_000_000i64..1_000_000, 1..5), k in 1usize..64) {
        let x = place_server(&Tensor::vector(&v.iter().map(|&i| i as f64).collect::<Vec<_>>()));
        let s = federated_sum(&federated_broadcast(&x, ClientCount::new(k).unwrap()).unwrap()).unwrap();
        prop_assert_eq!(s.placement(), Placement::Server);
        let expected: Vec<f64> = v.iter().map(|&i| (i * k as i64) as f64).collect();
        prop_assert_eq!(s.tensor().to_vec(), expected);
    }

    #[test]
    fn map_composition((k, rows) in clients_value()) {
        let parts: Vec<Tensor> = rows.iter().map(|r| Tensor::vector(r)).collect();
        let x = PlacedStructure::Leaf(place_clients(&parts, ClientCount::new(k).unwrap()).unwrap());
        let f = |xs: &[Tensor]| Ok(vec![ew_unary(UnaryOp::Scale(3.0), &xs[0])?]);
        let g = |xs: &[Tensor]| Ok(vec![ew_unary(UnaryOp::IntegerPow(2), &xs[0])?]);
        let two_pass = federated_map(g, &federated_map(f, &x).unwrap()).unwrap();
        let fused = federated_map(|xs: &[Tensor]| g(&f(xs)?), &x).unwrap();
        prop_assert!(two_pass.leaves()[0].1.tensor().bit_eq(fused.leaves()[0].1.tensor()));
        prop_assert_eq!(two_pass.leaves()[0].1.placement(), Placement::Clients);
    }

    #[test]
    fn mean_is_sum_over_n((k, rows) in clients_value()) {
        let parts: Vec<Tensor> = rows.iter().map(|r| Tensor::vector(r)).collect();
        let x = place_clients(&parts, ClientCount::new(k).unwrap()).unwrap();
        let mean = federated_mean(&x).unwrap();
        let sum = federated_sum(&x).unwrap();
        let expected: Vec<f64> = sum.tensor().data().iter().map(|s| s / k as f64).collect();
        prop_assert_eq!(mean.tensor().to_vec(), expected);
        prop_assert_eq!(mean.placement(), Placement::Server);
    }
}

#[test]
fn signatures_reject_wrong_placements() {
    let n = ClientCount::new(2).unwrap();
    let mut e = Eager::new(n);
    let s = e.input(Tensor::matrix(&[[1.0]]), Some(Placement::Server)).unwrap();
    let c = e.input(Tensor::matrix(&[[1.0], [2.0]]), Some(Placement::Clients)).unwrap();
    assert!(e.federated_broadcast(&c).is_err());
    assert!(e.federated_sum(&s).is_err());
    assert!(e.federated_mean(&s).is_err());
    assert!(e.add(&s, &c).is_err());
    let b = e.federated_broadcast(&s).unwrap();
    assert_eq!(b.placement, Some(Placement::Clients));
    assert_eq!(e.federated_mean(&b).unwrap().placement, Some(Placement::Server));
    let m = e.federated_map(std::slice::from_ref(&c), &|b, v| Ok(vec![b.neg(&v[0])?])).unwrap();
    assert_eq!(m[0].placement, Some(Placement::Clients));
    assert!(e.federated_map(&[c, s], &|_, v| Ok(v.to_vec())).is_err());
}
