"""Two-stage reader for noisy handwritten-style forms.

Stage one finds word-level boxes on a whole form (five classes: Word,
Signature, Stamp, Date, Noise); stage two recognizes each Word crop with one
of three models (closed-vocabulary classifier, CTC character reader, or an
attention encoder-decoder with a CTC-regularized encoder) and repairs the
output against a lexicon.  Everything runs on a small float64 autograd
engine; datasets are generated synthetically and all results are
reproducible from a single seed.
"""

__version__ = "0.1.0"
