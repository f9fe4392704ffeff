use std::path::Path;

use dlmm::io::{assignment_csv, dataset_csv, parse_csv, write_atomic, Schema};
use dlmm::Error;
use dlmm_core::grouping::assign_pseudo_units;
use dlmm_core::simulate::simulate_destructive;
use dlmm_core::{GroupingStrategy, SimulationConfig};
use proptest::prelude::*;

fn parse(text: &str) -> Result<dlmm_core::LongDataset, Error> {
    parse_csv(Path::new("t.csv"), text, &Schema::default(), true)
}

#[test]
fn four_row_file() {
    let ds = parse("eu,obs,time,rep,y\n1,a,1,1,1\n1,b,2,1,3\n2,c,1,1,11\n2,d,2,1,13\n").unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.times(), 2);
    assert!(ds.is_balanced());
    assert_eq!(ds.responses(), vec![1.0, 3.0, 11.0, 13.0]);
}

#[test]
fn unit_seen_at_two_times() {
    let err = parse("eu,obs,time,rep,y\n1,7,1,1,1\n1,7,2,1,3\n").unwrap_err();
    assert!(matches!(err, Error::ObservedTwice { row: 2, .. }), "{err}");
    assert!(err.to_string().contains("observational unit observed twice"));
    // Without the destructive check the same file loads.
    parse_csv(Path::new("t.csv"), "eu,obs,time,rep,y\n1,7,1,1,1\n1,7,2,1,3\n", &Schema::default(), false).unwrap();
}

#[test]
fn distinct_errors_with_rows() {
    assert!(matches!(parse(""), Err(Error::EmptyFile { .. })));
    assert!(matches!(parse("eu,obs,time,rep,y\n"), Err(Error::EmptyFile { .. })));
    assert!(matches!(
        parse("eu,obs,rep,y\n1,1,1,2\n"),
        Err(Error::MissingColumn { column, .. }) if column == "time"
    ));
    assert!(matches!(
        parse("eu,obs,time,rep,y\n1,1,1,1,2\n1,2,1,1,2,5\n"),
        Err(Error::Malformed { row: 2, .. })
    ));
    assert!(matches!(
        parse("eu,obs,time,rep,y\n1,1,1,1,2\n1,2,1,1,x\n"),
        Err(Error::Parse { row: 2, column, .. }) if column == "y"
    ));
    assert!(matches!(
        parse("eu,obs,time,rep,y\n1,1,0,1,2\n"),
        Err(Error::Parse { row: 1, column, .. }) if column == "time"
    ));
    assert!(matches!(
        parse("eu,obs,time,rep,y\n1,1,1,1,2\n1,2,1,1,2\n1,1,1,1,3\n"),
        Err(Error::DuplicateKey { row: 3, .. })
    ));
}

#[test]
fn optional_columns_and_custom_names() {
    let schema = Schema {
        eu: "school".into(),
        time: "year".into(),
        y: "score".into(),
        factors: Some(vec!["arm".into()]),
        ..Schema::default()
    };
    let text = "school,year,arm,score,note\ns1,1,ctl,1.5,x\ns1,2,ctl,2.5,y\ns2,1,trt,3,z\ns2,2,trt,4,w\n";
    let ds = parse_csv(Path::new("t.csv"), text, &schema, true).unwrap();
    assert_eq!(ds.factors().len(), 1);
    assert_eq!(ds.factors()[0].levels, vec!["ctl".to_string(), "trt".into()]);
    assert!(ds.observations().iter().all(|o| o.rep == 1));
}

#[test]
fn simulated_export_round_trips() {
    let cfg = SimulationConfig {
        n: 5,
        m: 2,
        t: 5,
        k: 1,
        l: 2,
        g: 1,
        seed: 3,
        ..SimulationConfig::default()
    };
    let (_, ds) = simulate_destructive(&cfg).unwrap();
    assert_eq!(ds.len(), 100);
    let text = dataset_csv(&ds);
    let back = parse(&text).unwrap();
    assert_eq!(back, ds);
    assert_eq!(dataset_csv(&back), text);
}

#[test]
fn assignment_layout() {
    let ds = parse("eu,obs,time,rep,y\n1,a,1,1,5\n1,b,1,1,3\n2,c,1,1,11\n2,d,1,1,13\n").unwrap();
    let pa = assign_pseudo_units(&ds, 2, GroupingStrategy::Rank, None).unwrap();
    assert_eq!(assignment_csv(&ds, &pa), "eu,time,obs,group\n1,1,a,2\n1,1,b,1\n2,1,c,1\n2,1,d,2\n");
}

#[test]
fn atomic_write_replaces_whole_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/out.txt");
    write_atomic(&path, b"first version, rather long").unwrap();
    write_atomic(&path, b"second").unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
    let leftovers = std::fs::read_dir(path.parent().unwrap()).unwrap().count();
    assert_eq!(leftovers, 1);
}

proptest! {
    #[test]
    fn responses_survive_export(ys in prop::collection::vec(-1e12f64..1e12, 1..30)) {
        let mut text = String::from("eu,obs,time,rep,y\n");
        for (i, y) in ys.iter().enumerate() {
            text += &format!("{},{},1,1,{}\n", i % 3, i, y);
        }
        let ds = parse(&text).unwrap();
        prop_assert_eq!(parse(&dataset_csv(&ds)).unwrap(), ds);
    }
}
