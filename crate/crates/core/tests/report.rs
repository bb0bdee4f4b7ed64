use steer_core::report::{format_float, render_svg, ChartOptions, CsvTable, Metadata, Series};

fn sample_table() -> CsvTable {
    let meta = Metadata::new().with("seed", 7).with("note", "two\nlines");
    let mut t = CsvTable::new(meta, &["id", "value", "label"]);
    t.push(vec![0usize.into(), 0.1f64.into(), "plain".into()]).unwrap();
    t.push(vec![1usize.into(), (1.0f64 / 3.0).into(), "with, comma".into()]).unwrap();
    t.push(vec![2usize.into(), (-2.5e-300f64).into(), "".into()]).unwrap();
    t
}

#[test]
fn floats_round_trip_exactly() {
    for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 123_456_789.123_456_79] {
        let s = format_float(v);
        assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
    }
    assert_eq!(format_float(f64::NAN), "NaN");
}

#[test]
fn table_parses_back_with_a_standard_reader() {
    let bytes = sample_table().to_bytes().unwrap();
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert!(text.starts_with("# steer "));
    assert!(text.contains("# seed = 7\n"));
    assert!(text.contains("# note = two lines\n"));
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));

    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes.as_slice());
    assert_eq!(rdr.headers().unwrap(), vec!["id", "value", "label"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 1.0 / 3.0);
    assert_eq!(&rows[1][2], "with, comma");
}

#[test]
fn ragged_rows_are_rejected() {
    let mut t = sample_table();
    assert!(t.push(vec![1usize.into()]).is_err());
}

#[test]
fn svg_is_deterministic_and_stamped() {
    let series = [Series::new("y", vec![(0.0, 1.0), (1.0, 0.1), (2.0, 0.01)])];
    let opts = ChartOptions {
        log_y: true,
        ..ChartOptions::default()
    };
    let a = render_svg(&series, &opts, 42).unwrap();
    let b = render_svg(&series, &opts, 42).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("<?xml"));
    assert!(a.contains("<svg") && a.trim_end().ends_with("</svg>"));
    assert_ne!(a, render_svg(&series, &opts, 43).unwrap());
    assert!(render_svg(&[], &opts, 0).is_err());
}

#[test]
fn digest_depends_on_content() {
    let a = Metadata::new().with("b", 0.124);
    let b = Metadata::new().with("b", 0.125);
    assert_eq!(a.digest(), a.clone().digest());
    assert_ne!(a.digest(), b.digest());
}
