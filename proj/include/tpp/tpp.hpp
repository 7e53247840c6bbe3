#ifndef TPP_TPP_HPP
#define TPP_TPP_HPP

// Umbrella header for the whole pipeline.

#include "tpp/binio.hpp"
#include "tpp/dataset.hpp"
#include "tpp/experiment.hpp"
#include "tpp/featmerge.hpp"
#include "tpp/fisher.hpp"
#include "tpp/fusion.hpp"
#include "tpp/gmm.hpp"
#include "tpp/matrix.hpp"
#include "tpp/metrics.hpp"
#include "tpp/parallel.hpp"
#include "tpp/rng.hpp"
#include "tpp/synth.hpp"
#include "tpp/tppnet.hpp"

#endif  // TPP_TPP_HPP
