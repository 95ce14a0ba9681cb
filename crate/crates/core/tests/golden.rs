mod common;

use velvet_core::alpaca::{
    formulation_to_pair, read_jsonl, write_jsonl, ExcipientOrder, InstructionPair, PromptTemplates,
};
use velvet_core::formulation::{FilamentAspect, Formulation, Printability};
use velvet_core::parser::DiagnosticCode;
use velvet_core::{parse_response, strip_template_phrases};

fn training_examples() -> Vec<(Formulation, &'static str, PromptTemplates, InstructionPair)> {
    let as_given = PromptTemplates {
        excipient_order: ExcipientOrder::AsGiven,
        ..PromptTemplates::default()
    };
    vec![
        (
            Formulation::new("1", [("Ciprofloxacin", 20.0), ("PCL", 60.0), ("PEG2000", 20.0)])
                .with_labels(Printability::Yes, FilamentAspect::Flexible),
            "Ciprofloxacin",
            PromptTemplates::default(),
            InstructionPair {
                instruction: "Recommend excipients for 20 w/w% Ciprofloxacin".into(),
                input: String::new(),
                response: "For this formulation, use these excipients: PCL: 60 w/w%, PEG2000: 20 w/w%. This is printable and has a Flexible filament aspect.".into(),
            },
        ),
        (
            Formulation::new(
                "2",
                [("Theophylline", 10.0), ("HPC", 40.0), ("Eudragit", 40.0), ("PEG6000", 10.0)],
            )
            .with_labels(Printability::Yes, FilamentAspect::Good),
            "Theophylline",
            as_given,
            InstructionPair {
                instruction: "Recommend excipients for 10 w/w% Theophylline".into(),
                input: String::new(),
                response: "For this formulation, use these excipients: HPC: 40 w/w%, Eudragit: 40 w/w%, PEG6000: 10 w/w%. This is printable and has a Good filament aspect.".into(),
            },
        ),
        (
            Formulation::new(
                "3",
                [
                    ("Paracetamol", 25.0),
                    ("HPMC", 60.0),
                    ("Methyl paraben", 10.0),
                    ("Polyethylene glycol PEG8000", 5.0),
                ],
            )
            .with_labels(Printability::Yes, FilamentAspect::Good),
            "Paracetamol",
            PromptTemplates::default(),
            InstructionPair {
                instruction: "Recommend excipients for 25 w/w% Paracetamol".into(),
                input: String::new(),
                response: "For this formulation, use these excipients: HPMC: 60 w/w%, Methyl paraben: 10 w/w%, Polyethylene glycol PEG8000: 5 w/w%. This is printable and has a Good filament aspect.".into(),
            },
        ),
    ]
}

#[test]
fn training_examples_render_byte_identically() {
    for (f, api, templates, expected) in training_examples() {
        let pair = formulation_to_pair(&f, api, &templates).unwrap();
        assert_eq!(pair, expected);
    }
}

#[test]
fn training_examples_survive_jsonl() {
    let pairs: Vec<InstructionPair> = training_examples().into_iter().map(|t| t.3).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    write_jsonl(&pairs, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(!text.contains('\r'));
    assert_eq!(read_jsonl(&path).unwrap(), pairs);
}

#[test]
fn training_example_responses_parse_back() {
    for (f, api, _, expected) in training_examples() {
        let p = parse_response(&expected.response);
        assert!(p.diagnostics.is_empty(), "{:?}", p.diagnostics);
        assert_eq!(p.printable, f.printable);
        assert_eq!(p.aspect, f.aspect);
        let got: Vec<(&str, f64)> = p
            .excipients
            .iter()
            .map(|e| (e.name.as_str(), e.proportion.unwrap()))
            .collect();
        let want: Vec<(&str, f64)> = f
            .composition
            .iter()
            .filter(|(n, _)| n.as_str() != api)
            .map(|(n, v)| (n.as_str(), *v))
            .collect();
        let (mut got, mut want) = (got, want);
        got.sort_by(|a, b| a.0.cmp(b.0));
        want.sort_by(|a, b| a.0.cmp(b.0));
        assert_eq!(got, want);
    }
}

#[test]
fn strip_leaves_only_the_list() {
    let text = "For this formulation, use these excipients: PCL: 60 w/w%, PEG2000: 20 w/w%. This is printable and has a flexible filament aspect.";
    assert_eq!(strip_template_phrases(text), "PCL: 60 w/w%, PEG2000: 20 w/w%.");
}

#[test]
fn response_fixtures() {
    let cases = common::response_cases();
    assert_eq!(cases.len(), 20);
    for case in &cases {
        if let Err(e) = common::check_response_case(case) {
            panic!("{}: {e}", case.label);
        }
    }
}

#[test]
fn escape_tail_with_hallucinated_name() {
    let case = common::response_cases()
        .into_iter()
        .find(|c| c.label == "escape-tail-before")
        .unwrap();
    let p = parse_response(&case.text);
    assert_eq!(p.excipients.len(), 3);
    assert_eq!(p.excipients[0].name, "Polyvinyl Carbate succinatesuccinatesuccinate");
    assert_eq!(p.excipients[0].proportion, Some(5.0));
    assert!(p.has(DiagnosticCode::NonAsciiTail));
}

#[test]
fn degenerate_outputs_are_flagged() {
    let p = parse_response("0##ability05.");
    assert!(p.excipients.is_empty());
    assert_eq!(p.printable, Printability::Unknown);
    assert_eq!(p.aspect, FilamentAspect::Unknown);
    assert!(p.has(DiagnosticCode::EmptyParse));

    for label in ["collapsed-high-lr", "markdown-table", "word-salad", "punctuation-noise"] {
        let case = common::response_cases()
            .into_iter()
            .find(|c| c.label == label)
            .unwrap();
        let p = parse_response(&case.text);
        assert!(
            p.excipients.iter().all(|e| e.unit != velvet_core::parser::Unit::WwPct),
            "{label}"
        );
        assert!(!p.diagnostics.is_empty(), "{label}");
    }
}
