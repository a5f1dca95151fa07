from sklearn.linear_model import LogisticRegression
from sklearn.ensemble import RandomForestClassifier
from sklearn.cluster import KMeans
from sklearn.metrics import r2_score

lr = LogisticRegression()
lr2 = LogisticRegression(solver='saga')
lr3 = LogisticRegression(C=2.0)
lr4 = LogisticRegression(penalty='l1', solver='liblinear')
lr5 = LogisticRegression(max_iter=500)
rf = RandomForestClassifier()
rf2 = RandomForestClassifier(200)
rf3 = RandomForestClassifier(n_estimators=50)
rf4 = RandomForestClassifier(max_depth=3)
rf5 = RandomForestClassifier(random_state=1)
km = KMeans()
km2 = KMeans(8)
km3 = KMeans(algorithm='elkan')
km4 = KMeans(n_clusters=3, random_state=0)
r2 = r2_score(y_true, y_pred)
r2b = r2_score(y_true, y_pred, multioutput='raw_values')
r2c = r2_score(y_true, y_pred, sample_weight=w)
