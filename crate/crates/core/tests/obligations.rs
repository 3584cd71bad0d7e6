use topobroker_core::certifier::{check, obligations, MultiplicationTable};

const C4: &str = include_str!("data/c4_obligations.lisp");

#[test]
fn cyclic_four_obligations_match_golden() {
    let doc = obligations(&MultiplicationTable::cyclic(4));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(
            concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/tests/data/c4_obligations.lisp"
            ),
            &doc,
        )
        .unwrap();
        return;
    }
    assert_eq!(doc, C4);
}

#[test]
fn obligations_name_each_axiom_once() {
    for name in [
        "grp-closure",
        "grp-associativity",
        "grp-identity",
        "grp-inverse",
    ] {
        assert_eq!(C4.matches(&format!("(defthm {name}")).count(), 1, "{name}");
    }
    assert!(C4.starts_with("; group obligations for a table of order 4"));
}

#[test]
fn documents_do_not_depend_on_validity() {
    let good = MultiplicationTable::cyclic(3);
    let bad = good.with_entry(0, 0, 2);
    assert!(check(&good).is_certified() && !check(&bad).is_certified());
    let (a, b) = (obligations(&good), obligations(&bad));
    assert_ne!(a, b);
    assert_eq!(a.lines().count(), b.lines().count());
}
