use t3kit_core::corpus::ingest;
use t3kit_core::demo::synthetic_corpus;
use t3kit_core::provider::{MockProvider, PromptSet};
use t3kit_core::quality::verify_sample;
use t3kit_core::synth::{generate_vec, GenerateOptions, Generator, TaskFamily};

#[test]
fn every_family_generates_verified_samples() {
    let pool = ingest(synthetic_corpus(4000, 11)).unwrap().pool;
    let mock = MockProvider::new(3);
    let prompts = PromptSet::builtin();
    let g = Generator::new(&pool, &mock, &prompts);
    for family in TaskFamily::all() {
        let (samples, report) = generate_vec(&g, &GenerateOptions::new(family, 30, 5)).unwrap();
        eprintln!("{family}: {report:?}");
        assert_eq!(samples.len(), 30);
        assert!(samples.iter().all(|s| s.family == family));
        assert!(samples.iter().all(|s| verify_sample(s, Some(&pool)).pass));
    }
}
