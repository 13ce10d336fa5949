#include "doctest.h"

#include "cpflow/array.hpp"
#include "cpflow/errors.hpp"

using namespace cpflow;

TEST_CASE("factories and shape accessors") {
  ArrayValue z = ArrayValue::zeros({2, 3});
  CHECK(z.rank() == 2);
  CHECK(z.size() == 6);
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 3);
  for (long i = 0; i < z.size(); ++i) CHECK(z.at(i) == 0.0);

  ArrayValue f = ArrayValue::full({4}, 2.5);
  CHECK(f.rank() == 1);
  CHECK(f.rows() == 1);  // rank-1 treated as a single row
  CHECK(f.cols() == 4);
  CHECK(f.at(3) == 2.5);

  ArrayValue s = ArrayValue::scalar(-7.0);
  CHECK(s.rank() == 0);
  CHECK(s.size() == 1);
  CHECK(s.scalar_value() == -7.0);
}

TEST_CASE("from copies the input buffer") {
  std::vector<double> v{1, 2, 3, 4};
  ArrayValue a = ArrayValue::from({2, 2}, v);
  v[0] = 99;
  CHECK(a.at(0) == 1.0);
}

TEST_CASE("reshape shares the buffer and checks element count") {
  ArrayValue a = ArrayValue::from({2, 3}, {1, 2, 3, 4, 5, 6});
  ArrayValue b = a.reshaped({3, 2});
  CHECK(b.rank() == 2);
  CHECK(b.rows() == 3);
  CHECK(b.at(5) == 6.0);
  CHECK(a.buffer().get() == b.buffer().get());
  CHECK_THROWS_AS(a.reshaped({4, 2}), ContractError);
}

TEST_CASE("scalar_value rejects non-scalars") {
  ArrayValue a = ArrayValue::zeros({2});
  CHECK_THROWS_AS(a.scalar_value(), ContractError);
}

TEST_CASE("constructor validates buffer length") {
  auto buf = std::make_shared<std::vector<double>>(5, 0.0);
  CHECK_THROWS_AS(ArrayValue({2, 3}, buf), ContractError);
}

TEST_CASE("shape helpers") {
  ArrayValue a = ArrayValue::zeros({2, 3});
  ArrayValue b = ArrayValue::zeros({2, 3});
  ArrayValue c = ArrayValue::zeros({3, 2});
  CHECK(same_shape(a, b));
  CHECK(!same_shape(a, c));
  CHECK(shape_str(a.shape()) == "[2,3]");
  CHECK(shape_str({}) == "[]");
}
