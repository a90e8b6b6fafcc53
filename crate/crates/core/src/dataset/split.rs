use std::collections::BTreeMap;

use super::{EncodedSample, FeatureSchema, Interaction};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeaveOneOut {
    pub train: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
}

/// Hold out each user's last positive (by order key, then input order).
///
/// Users with a single interaction stay in train. Train keeps input order;
/// test is ordered by user value index.
pub fn leave_one_out(interactions: &[Interaction], schema: &FeatureSchema) -> LeaveOneOut {
    let user = schema.user_domain();
    let mut last: BTreeMap<u32, (usize, i64, usize)> = BTreeMap::new();
    for (idx, it) in interactions.iter().enumerate() {
        let u = it.sample.values[user];
        let e = last.entry(u).or_insert((idx, it.order_key, 0));
        if it.order_key >= e.1 {
            e.0 = idx;
            e.1 = it.order_key;
        }
        e.2 += 1;
    }
    let mut held_out = vec![false; interactions.len()];
    let mut test = Vec::new();
    for (idx, _, count) in last.values() {
        if *count >= 2 {
            held_out[*idx] = true;
            test.push(interactions[*idx].sample.clone());
        }
    }
    let train = interactions
        .iter()
        .zip(&held_out)
        .filter(|(_, &h)| !h)
        .map(|(it, _)| it.sample.clone())
        .collect();
    LeaveOneOut { train, test }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Domain, Side};

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                Domain {
                    name: "u".into(),
                    cardinality: 3,
                    side: Side::User,
                },
                Domain {
                    name: "i".into(),
                    cardinality: 10,
                    side: Side::Item,
                },
            ],
            0,
            1,
        )
        .unwrap()
    }

    fn it(u: u32, i: u32, key: i64) -> Interaction {
        Interaction {
            sample: EncodedSample::new(vec![u, i], 1),
            order_key: key,
        }
    }

    #[test]
    fn holds_out_last_interaction() {
        let data = vec![it(0, 1, 10), it(0, 3, 30), it(0, 2, 20)];
        let s = leave_one_out(&data, &schema());
        assert_eq!(s.test, vec![EncodedSample::new(vec![0, 3], 1)]);
        assert_eq!(s.train.len(), 2);
        assert!(s.train.iter().all(|x| x.values[1] != 3));
    }

    #[test]
    fn single_interaction_user_stays_in_train() {
        let s = leave_one_out(&[it(1, 9, 0)], &schema());
        assert!(s.test.is_empty());
        assert_eq!(s.train, vec![EncodedSample::new(vec![1, 9], 1)]);
    }

    #[test]
    fn ties_resolve_to_later_row() {
        let s = leave_one_out(&[it(0, 1, 5), it(0, 2, 5)], &schema());
        assert_eq!(s.test[0].values, vec![0, 2]);
    }

    #[test]
    fn empty_input_gives_empty_split() {
        assert_eq!(leave_one_out(&[], &schema()), LeaveOneOut::default());
    }
}
