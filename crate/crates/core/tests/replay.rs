use htring::harness::{self, replay, Check, ClientGroup, Scenario};

fn clean_trace() -> String {
    let s = Scenario {
        n: 3,
        clients: vec![ClientGroup {
            count: 2,
            requests: 3,
            payload: 32,
            ..ClientGroup::default()
        }],
        ..Scenario::default()
    };
    let r = harness::simulate(&s);
    assert!(r.verdict.ok(), "{}", r.describe());
    r.trace_text()
}

fn lines(t: &str) -> Vec<String> {
    t.lines().map(str::to_string).collect()
}

#[test]
fn clean_trace_replays_clean() {
    assert!(replay(&clean_trace()).unwrap().ok());
}

#[test]
fn swapped_executions_are_flagged_out_of_order() {
    let mut ls = lines(&clean_trace());
    let execs: Vec<usize> = ls
        .iter()
        .enumerate()
        .filter(|(_, l)| l.contains("ev=exec node=1 "))
        .map(|(k, _)| k)
        .collect();
    assert!(execs.len() >= 2);
    ls.swap(execs[0], execs[1]);
    let v = replay(&ls.join("\n")).unwrap();
    let hit = v.first(Check::InOrder).expect("out-of-order exec detected");
    assert_eq!(hit.line, execs[0] + 1);
}

#[test]
fn ring_message_ahead_of_its_persist_is_flagged() {
    let mut ls = lines(&clean_trace());
    let send = ls
        .iter()
        .position(|l| l.contains("kind=PHASE2B ") && l.contains("ev=send"))
        .expect("a PHASE 2B send");
    let sender = ls[send]
        .split_whitespace()
        .find_map(|f| f.strip_prefix("sender="))
        .unwrap()
        .to_string();
    let persist = ls[..send]
        .iter()
        .rposition(|l| l.contains(&format!("ev=persist node={sender} kind=acc")))
        .expect("matching persist");
    let line = ls.remove(send);
    ls.insert(persist, line);
    let v = replay(&ls.join("\n")).unwrap();
    let hit = v.first(Check::PersistBeforeSend).expect("early send detected");
    assert_eq!(hit.line, persist + 1);
}

#[test]
fn parse_errors_name_the_line() {
    let mut ls = lines(&clean_trace());
    ls[4] = "t=9 ev=exec node=banana".into();
    let e = replay(&ls.join("\n")).unwrap_err().to_string();
    assert!(e.contains("line 5"), "{e}");
}
