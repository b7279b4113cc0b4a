use super::records::UserHistory;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub user: usize,
    pub train: Vec<usize>,
    pub validation: Option<usize>,
    pub test: Option<usize>,
}

/// Interaction indices partitioned per user.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub users: Vec<UserSplit>,
}

impl DatasetSplit {
    pub fn train_len(&self) -> usize {
        self.users.iter().map(|u| u.train.len()).sum()
    }

    pub fn validation_len(&self) -> usize {
        self.users.iter().filter(|u| u.validation.is_some()).count()
    }

    pub fn test_len(&self) -> usize {
        self.users.iter().filter(|u| u.test.is_some()).count()
    }
}

/// Last interaction to test, second-to-last to validation, the rest to
/// train. Users with fewer than three interactions are train-only.
pub fn temporal_split(histories: &[UserHistory]) -> DatasetSplit {
    let users = histories
        .iter()
        .map(|h| {
            let it = &h.interactions;
            if it.len() < 3 {
                UserSplit {
                    user: h.user,
                    train: it.clone(),
                    validation: None,
                    test: None,
                }
            } else {
                let n = it.len();
                UserSplit {
                    user: h.user,
                    train: it[..n - 2].to_vec(),
                    validation: Some(it[n - 2]),
                    test: Some(it[n - 1]),
                }
            }
        })
        .collect();
    DatasetSplit { users }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split_of(n: usize) -> UserSplit {
        let h = UserHistory {
            user: 0,
            interactions: (0..n).collect(),
        };
        temporal_split(&[h]).users.remove(0)
    }

    #[test]
    fn four_interactions() {
        let s = split_of(4);
        assert_eq!(s.train, vec![0, 1]);
        assert_eq!(s.validation, Some(2));
        assert_eq!(s.test, Some(3));
    }

    #[test]
    fn short_histories_are_train_only() {
        let s = split_of(2);
        assert_eq!(s.train, vec![0, 1]);
        assert_eq!((s.validation, s.test), (None, None));
        let s = split_of(0);
        assert!(s.train.is_empty());
    }

    #[test]
    fn three_interactions_one_each() {
        let s = split_of(3);
        assert_eq!(s.train, vec![0]);
        assert_eq!(s.validation, Some(1));
        assert_eq!(s.test, Some(2));
    }
}
