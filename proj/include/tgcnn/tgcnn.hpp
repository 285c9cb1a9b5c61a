#pragma once

#include "tgcnn/autodiff.hpp"
#include "tgcnn/config.hpp"
#include "tgcnn/error.hpp"
#include "tgcnn/features.hpp"
#include "tgcnn/gradcheck.hpp"
#include "tgcnn/kernels.hpp"
#include "tgcnn/layers.hpp"
#include "tgcnn/metrics.hpp"
#include "tgcnn/model.hpp"
#include "tgcnn/model_io.hpp"
#include "tgcnn/random.hpp"
#include "tgcnn/tensor.hpp"
#include "tgcnn/train.hpp"
