#pragma once

#include "corpus_prune/clustering.hpp"
#include "corpus_prune/corpus_io.hpp"
#include "corpus_prune/document.hpp"
#include "corpus_prune/embedding.hpp"
#include "corpus_prune/error.hpp"
#include "corpus_prune/filter.hpp"
#include "corpus_prune/hash.hpp"
#include "corpus_prune/review.hpp"
#include "corpus_prune/rng.hpp"
