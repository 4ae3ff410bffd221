//! Reviser and judge prompt templates.

const REVISER_HEAD: &str = "You are a teacher and your task is to minimally improve a student's answer. I will give you a {{task}} and a {{student_solution}}. Your job is to revise the {{student_solution}} such that it is clearer, more correct, and more engaging. Copy all non-corrected parts of the student's answer. Do not allude to the {{corrected_student_solution}} being a revision or a correction in your final solution.\n\n{{task}}: ";
const REVISER_MID: &str = "\n\n{{student_solution}}: ";
const REVISER_TAIL: &str = "\n\n-----------------\n\nLet's first think step by step with a {{teacher_reasoning}} to decide how to improve the {{student_solution}}, then give the {{corrected_student_solution}}. Mention the {{teacher_reasoning}} and {{corrected_student_solution}} identifiers to structure your answer.\n\n";

const JUDGE_HEAD: &str = "You are a teacher and your task is to pick the best student's answer. The best answer is the most clear, most correct, and most engaging answer. I will give you a {{task}} and {{student_solution_1}} and {{student_solution_2}}. Your final answer must contain [1] if {{student_solution_1}} was best, else [2].\n\n{{task}}: ";
const JUDGE_MID_1: &str = "\n\n{{student_solution_1}}: ";
const JUDGE_MID_2: &str = "\n\n{{student_solution_2}}: ";
const JUDGE_TAIL: &str = "\n\n-----------------\n\nLet's first think step by step with a {{teacher_reasoning}} to decide which solution is better, and then answer [1] or [2].\n\n";

/// The fixed template pieces surrounding the reviser slots `x` and `y_l`.
pub const REVISER_TEMPLATE: [&str; 3] = [REVISER_HEAD, REVISER_MID, REVISER_TAIL];
/// The fixed template pieces surrounding the judge slots `x`, `y1`, `y2`.
pub const JUDGE_TEMPLATE: [&str; 4] = [JUDGE_HEAD, JUDGE_MID_1, JUDGE_MID_2, JUDGE_TAIL];

pub fn render_reviser_prompt(x: &str, y_l: &str) -> String {
    [REVISER_HEAD, x, REVISER_MID, y_l, REVISER_TAIL].concat()
}

pub fn render_judge_prompt(x: &str, y1: &str, y2: &str) -> String {
    [JUDGE_HEAD, x, JUDGE_MID_1, y1, JUDGE_MID_2, y2, JUDGE_TAIL].concat()
}

/// Splits `text` around the fixed `pieces`, returning the slot contents.
/// Slots are located by the last occurrence of the following separator, so
/// slot text containing a separator is recovered only when it is the last
/// slot before that separator.
fn split_slots(text: &str, pieces: &[&str]) -> Option<Vec<String>> {
    let (head, rest) = pieces.split_first()?;
    let mut body = text.strip_prefix(head)?;
    let (tail, mids) = rest.split_last()?;
    body = body.strip_suffix(tail)?;
    let mut slots = Vec::with_capacity(rest.len());
    for mid in mids {
        let at = body.find(mid)?;
        slots.push(body[..at].to_string());
        body = &body[at + mid.len()..];
    }
    slots.push(body.to_string());
    Some(slots)
}

/// Recovers `(x, y_l)` from a rendered reviser prompt.
pub fn parse_reviser_prompt(text: &str) -> Option<(String, String)> {
    let mut s = split_slots(text, &REVISER_TEMPLATE)?;
    let y_l = s.pop()?;
    Some((s.pop()?, y_l))
}

/// Recovers `(x, y1, y2)` from a rendered judge prompt.
pub fn parse_judge_prompt(text: &str) -> Option<(String, String, String)> {
    let mut s = split_slots(text, &JUDGE_TEMPLATE)?;
    let y2 = s.pop()?;
    let y1 = s.pop()?;
    Some((s.pop()?, y1, y2))
}
