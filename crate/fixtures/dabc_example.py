from sklearn import datasets
from sklearn.model_selection import train_test_split
from sklearn.metrics import accuracy_score
from sklearn.svm import SVC

# Load dataset
ds = datasets.fetch_20newsgroups_vectorized()
X = ds.data[:, 2:]
y = ds.target

# Create training/test data split
X_train, X_test, y_train, y_test = train_test_split(X, y, test_size=0.3,
                                    random_state=42, stratify=y)

# Create an instance of SVC Classifier
clf = SVC(random_state=42)

# Fit, predict, and measure model's performance
clf.fit(X_train, y_train)
y_pred = clf.predict(X_test)
print('Acc: %.2f' %
      accuracy_score(y_test, y_pred))
