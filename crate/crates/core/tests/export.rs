mod common;

use common::{corpus_with_transforms, random_inputs, rng};
use fedflow::ad::grad;
use fedflow::algorithms::federated_loss_graph;
use fedflow::export::{comm_summary, parse, serialize_canonical, serialize_text};
use fedflow::ir::{eval_graph, MapMode};
use fedflow::{ClientCount, Error};

const GOLDEN_LOSS: &str = include_str!("golden/federated_loss.fedgraph.txt");
const GOLDEN_GRAD: &str = include_str!("golden/grad_federated_loss.fedgraph.txt");

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

#[test]
fn canonical_round_trip_preserves_structure_and_results() {
    let mut r = rng(41);
    for (name, g) in corpus_with_transforms(3) {
        let bytes = serialize_canonical(&g);
        let back = parse(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(back, g, "{name}");
        assert_eq!(serialize_canonical(&back), bytes, "{name}");
        for _ in 0..5 {
            let inputs = random_inputs(&g, &mut r);
            let a = eval_graph(&g, &inputs).unwrap();
            let b = eval_graph(&back, &inputs).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.bit_eq(y)), "{name}");
        }
    }
}

#[test]
fn loss_listing_matches_golden_file() {
    let g = federated_loss_graph(ClientCount::new(1).unwrap(), 2, None, MapMode::Inline).unwrap();
    assert_eq!(tokens(&serialize_text(&g)), tokens(GOLDEN_LOSS));
}

#[test]
fn grad_listing_matches_golden_file() {
    let g = federated_loss_graph(ClientCount::new(1).unwrap(), 2, None, MapMode::Inline).unwrap();
    let text = serialize_text(&grad(&g, 0).unwrap());
    assert_eq!(tokens(&text), tokens(GOLDEN_GRAD));
    assert!(text.lines().any(|l| l.contains("= sum_from_clients")));
    assert!(text.lines().any(|l| l.trim_start().starts_with("_:") && l.contains("mean_from_clients")));
}

#[test]
fn communication_summary_survives_dead_code_elimination() {
    for (name, g) in corpus_with_transforms(2) {
        let pruned = g.eliminate_dead_code(false);
        pruned.validate().unwrap();
        assert_eq!(comm_summary(&pruned), comm_summary(&g), "{name}");
        assert!(pruned.equations().len() <= g.equations().len());
    }
}

#[test]
fn dropping_dead_communication_removes_unused_aggregates() {
    let g = federated_loss_graph(ClientCount::new(2).unwrap(), 2, None, MapMode::Inline).unwrap();
    let dg = grad(&g, 0).unwrap();
    let pruned = dg.eliminate_dead_code(true);
    assert_eq!(
        comm_summary(&pruned).names(),
        vec!["broadcast_clients", "broadcast_clients", "sum_from_clients"]
    );
}

#[test]
fn malformed_input_is_reported_with_an_offset() {
    let g = federated_loss_graph(ClientCount::new(2).unwrap(), 2, None, MapMode::Nested).unwrap();
    let bytes = serialize_canonical(&g);
    for cut in [0, 5, bytes.len() / 2, bytes.len() - 2] {
        assert!(matches!(parse(&bytes[..cut]), Err(Error::Parse { .. })), "cut at {cut}");
    }
    let text = String::from_utf8(bytes).unwrap().replace("17:broadcast_clients", "17:broadcast_clientz");
    assert!(matches!(parse(text.as_bytes()), Err(Error::UnknownPrimitive(_))));
    assert!(parse(b"FEDGRAPH/9\n").is_err());
}
