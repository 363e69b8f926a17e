use super::PromptInstance;
use crate::corpus::DETAIL_LABEL;

/// Smallest budget accepted by [`enforce_token_budget`].
pub const MIN_BUDGET: usize = 512;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BudgetError {
    #[error("token budget {0} is below the minimum of {MIN_BUDGET}")]
    BudgetTooSmall(usize),
    #[error("prompt needs {needed} tokens even with every case detail emptied (budget {budget})")]
    CannotFit { needed: usize, budget: usize },
}

/// Character-based token estimate: `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Char range of the case-detail body inside a rendered case: after the
/// `Case Detail: ` label, up to a trailing `Verdict:` line if present.
fn detail_span(text: &str) -> Option<(usize, usize)> {
    let start = text.find(DETAIL_LABEL)? + DETAIL_LABEL.len();
    let end = text[start..].rfind("\nVerdict: ").map_or(text.len(), |i| start + i);
    Some((start, end))
}

fn detail_chars(text: &str) -> usize {
    detail_span(text).map_or(0, |(s, e)| text[s..e].chars().count())
}

fn cut_detail(text: &mut String, keep_chars: usize) {
    if let Some((s, e)) = detail_span(text) {
        let kept: String = text[s..e].chars().take(keep_chars).collect();
        text.replace_range(s..e, &kept);
    }
}

/// Largest level `L` such that trimming every section above `L` down to `L`
/// removes at least `excess` characters.
fn water_level(lengths: &[usize], excess: usize) -> Option<usize> {
    let removed = |level: usize| -> usize { lengths.iter().map(|l| l.saturating_sub(level)).sum() };
    if removed(0) < excess {
        return None;
    }
    let (mut lo, mut hi) = (0usize, lengths.iter().copied().max().unwrap_or(0));
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if removed(mid) >= excess {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Some(lo)
}

/// Shrinks case-detail sections, longest first, until the prompt estimate
/// fits `budget`. Choices (and few-shot examples) are the only truncatable
/// sections; scaffolding, titles and the input case stay intact.
pub fn enforce_token_budget(mut instance: PromptInstance, budget: usize) -> Result<PromptInstance, BudgetError> {
    if budget < MIN_BUDGET {
        return Err(BudgetError::BudgetTooSmall(budget));
    }
    instance.refresh_text();
    let chars = instance.instruction_text.chars().count();
    if chars <= budget * 4 {
        return Ok(instance);
    }
    let excess = chars - budget * 4;

    let mut lengths: Vec<usize> = instance.choices.iter().map(|c| detail_chars(&c.rendered)).collect();
    if let Some(icl) = &instance.icl_examples {
        lengths.push(detail_chars(&icl.similar_text));
        lengths.push(detail_chars(&icl.precedent_text));
    }
    let Some(level) = water_level(&lengths, excess) else {
        return Err(BudgetError::CannotFit { needed: (chars - lengths.iter().sum::<usize>()).div_ceil(4), budget });
    };

    let n_choices = instance.choices.len();
    for (i, len) in lengths.iter().enumerate() {
        if *len <= level {
            continue;
        }
        if i < n_choices {
            let choice = &mut instance.choices[i];
            cut_detail(&mut choice.rendered, level);
            instance.truncated.push(format!("choice {}", choice.position));
        } else if let Some(icl) = instance.icl_examples.as_mut() {
            if i == n_choices {
                cut_detail(&mut icl.similar_text, level);
                instance.truncated.push("similar example".into());
            } else {
                cut_detail(&mut icl.precedent_text, level);
                instance.truncated.push("precedent example".into());
            }
        }
    }
    instance.truncated.sort();
    instance.refresh_text();
    debug_assert!(instance.token_estimate <= budget);
    Ok(instance)
}
