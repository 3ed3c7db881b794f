use super::Emotion;

/// k-nearest-neighbour emotion classifier on calibrated features, kept as an
/// evaluation baseline.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    k: usize,
    points: Vec<(Vec<f64>, Emotion)>,
}

impl KnnClassifier {
    pub fn new(k: usize, points: Vec<(Vec<f64>, Emotion)>) -> Self {
        assert!(k > 0, "k must be positive");
        Self { k, points }
    }

    /// Majority vote among the `k` nearest points; ties go to the class whose
    /// nearest member is closest.
    pub fn predict(&self, x: &[f64]) -> Option<Emotion> {
        let mut dists: Vec<(f64, Emotion)> = self
            .points
            .iter()
            .map(|(p, e)| (p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), *e))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0));
        let neighbours = &dists[..self.k.min(dists.len())];
        let mut votes = [0usize; 4];
        for (_, e) in neighbours {
            votes[e.index()] += 1;
        }
        let top = *votes.iter().max()?;
        neighbours
            .iter()
            .find(|(_, e)| votes[e.index()] == top)
            .map(|&(_, e)| e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_of_neighbours_wins() {
        let knn = KnnClassifier::new(
            3,
            vec![
                (vec![0.0, 0.0], Emotion::Bored),
                (vec![0.1, 0.0], Emotion::Bored),
                (vec![1.0, 1.0], Emotion::Curious),
                (vec![0.9, 1.0], Emotion::Curious),
                (vec![0.2, 0.1], Emotion::Curious),
            ],
        );
        assert_eq!(knn.predict(&[0.05, 0.0]), Some(Emotion::Bored));
        assert_eq!(knn.predict(&[0.95, 0.95]), Some(Emotion::Curious));
        assert_eq!(KnnClassifier::new(1, vec![]).predict(&[0.0]), None);
    }
}
