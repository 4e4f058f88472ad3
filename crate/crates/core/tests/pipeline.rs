use sevec::features::{load_feature_set, save_feature_set};
use sevec::net::{load_network, save_network};
use sevec::perturb::{perturbation_study, PerturbConfig};
use sevec::retrieval::retrieve_by_sevec;
use sevec::sevec::{binarize, compute_sevec};
use sevec::store::{classify_nearest_sevec, ConceptStore};
use sevec::synthetic::{concept_fixture, tap_features, ConceptFixtureConfig};
use tempfile::TempDir;

#[test]
fn persisted_pipeline_matches_the_in_memory_one() {
    let dir = TempDir::new().unwrap();
    let fx = concept_fixture(&ConceptFixtureConfig::default(), 4).unwrap();
    let train = tap_features(&fx.net, &fx.train).unwrap();
    let test = tap_features(&fx.net, &fx.test).unwrap();

    let train_path = save_feature_set(&train, dir.path(), "train").unwrap();
    let test_path = save_feature_set(&test, dir.path(), "test").unwrap();
    let train2 = load_feature_set(&train_path).unwrap();
    let test2 = load_feature_set(&test_path).unwrap();
    assert_eq!(train, train2);
    assert_eq!(test, test2);

    let mut store = ConceptStore::new(train.dim());
    for label in train.distinct_labels() {
        let b = binarize(&train.select_label(&label).unwrap()).unwrap();
        store.insert(compute_sevec(&b.matrix, &label).unwrap()).unwrap();
    }
    let store_path = store.save(dir.path(), "concepts").unwrap();
    let store2 = ConceptStore::load(&store_path).unwrap();
    assert_eq!(store2.names().collect::<Vec<_>>(), store.names().collect::<Vec<_>>());

    for name in store.names() {
        let a = retrieve_by_sevec(&test, store.require(name).unwrap(), 10).unwrap();
        let b = retrieve_by_sevec(&test2, store2.require(name).unwrap(), 10).unwrap();
        assert_eq!(a, b);
        let correct = a.iter().filter(|h| test.label(h.row) == Some(name)).count();
        assert!(correct >= 8, "{name}: {correct}/10");
    }

    // nearest concept agrees with the label for most held-out samples
    let agree = (0..test.len())
        .filter(|&i| classify_nearest_sevec(test.row(i), &store2).unwrap().0 == test.label(i).unwrap())
        .count();
    assert!(agree as f64 / test.len() as f64 > 0.8, "{agree}/{}", test.len());

    let net_path = save_network(&fx.net, dir.path(), "net").unwrap();
    let net2 = load_network(net_path).unwrap();
    let config = PerturbConfig { threshold: 0.5, seed: 2 };
    let a = perturbation_study(&fx.net, &test, &store, &config).unwrap();
    let b = perturbation_study(&net2, &test2, &store2, &config).unwrap();
    assert_eq!(a, b);
}
