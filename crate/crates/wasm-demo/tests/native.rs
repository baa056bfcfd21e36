use fitslam_wasm_demo::Explorer;

#[test]
fn first_look_leaves_unknown_space_to_scan() {
    let e = Explorer::new(1);
    let occ = e.occupancy();
    assert_eq!(occ.len(), e.width() * e.height());
    assert!(occ.contains(&0.5));
    assert!(occ.iter().any(|p| *p != 0.5));
    let start = e.start();
    let s = e.scan(start[0], start[1]);
    assert_eq!(s.len(), 2 + 2 * 43);
    assert!(s[1] > 0.0);
    let windows: Vec<f64> = s[2..].chunks(2).map(|c| c[1]).collect();
    assert!(windows.iter().all(|w| *w <= s[1]));
}

#[test]
fn plans_inside_the_known_free_space() {
    let e = Explorer::new(1);
    let start = e.start();
    let path = e.plan(start[0], start[1], start[0] + 1.5, start[1] + 1.0);
    assert!(path.len() >= 4 && path.len().is_multiple_of(2));
    let nav = e.navigable();
    for c in path.chunks(2) {
        assert_eq!(nav[c[1] as usize * e.width() + c[0] as usize], 1);
    }
    assert!(e.plan(start[0], start[1], 23.5, 23.5).is_empty());
    assert!(e.plan(-5.0, 0.0, 1.0, 1.0).is_empty());
}
